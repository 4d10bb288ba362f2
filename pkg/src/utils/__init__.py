# Console helpers and the exception types shared by src.*
